//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! binary exits non-zero if any check fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use brrl_core::brmdp::{online_brvi_regret_bound, run_online_brvi, OnlineBrviConfig, QFunction};
use brrl_core::config::{parse_config, ExperimentConfig};
use brrl_core::environments::{build_frozen_lake, random_mdp, FrozenLakeLayout};
use brrl_core::harness::{replication_seed, run_experiment, write_outputs, AggregateResult};
use brrl_core::mdp::{stationary_distribution, value_iteration, TabularMdp};
use brrl_core::normality::limit_params;
use brrl_core::posteriors::{DirichletTransitionPosterior, GaussianLinearPosterior};
use brrl_core::risk::{derived_sample_size, empirical_cvar, RiskConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn preset(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// 1. CVaR against brute-force maximisation of x − E[(x − Z)⁺]/(1 − α).

fn rockafellar_objective(samples: &[f64], alpha: f64, x: f64) -> f64 {
    let shortfall: f64 = samples.iter().map(|z| (x - z).max(0.0)).sum::<f64>() / samples.len() as f64;
    x - shortfall / (1.0 - alpha)
}

fn grid_cvar(samples: &[f64], alpha: f64) -> f64 {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = (0..=2000).map(|i| lo + (hi - lo) * i as f64 / 2000.0);
    samples
        .iter()
        .copied()
        .chain(grid)
        .map(|x| rockafellar_objective(samples, alpha, x))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn cvar_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=60);
        let samples: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let alpha = rng.random_range(0.0..0.999);
        let got = empirical_cvar(&samples, alpha).unwrap();
        worst = worst.max((got - grid_cvar(&samples, alpha)).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-7 && elapsed < Duration::from_secs(10),
        format!("max |error| {worst:.2e} over 1000 instances in {:.2} s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 2. Coherence. Samples, shifts and scales are small dyadic rationals and
// n(1 − α) is a power of two, so every operation is exact in floating point.

fn coherence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dyadic = |rng: &mut ChaCha8Rng| rng.random_range(-512i32..512) as f64 / 64.0;
    let levels = [(8usize, 0.5), (8, 0.75), (8, 0.875), (16, 0.75), (16, 0.9375), (32, 0.5)];
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let (n, alpha) = levels[trial % levels.len()];
        let z: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let base = empirical_cvar(&z, alpha).unwrap();

        let c = dyadic(&mut rng);
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        if empirical_cvar(&shifted, alpha).unwrap() != base + c {
            failures.push(format!("translation (trial {trial})"));
        }
        let k = [0.25, 0.5, 2.0, 4.0][trial % 4];
        let scaled: Vec<f64> = z.iter().map(|x| k * x).collect();
        if empirical_cvar(&scaled, alpha).unwrap() != k * base {
            failures.push(format!("homogeneity (trial {trial})"));
        }
        // Dominated pair: w ≥ z pointwise.
        let w: Vec<f64> = z.iter().map(|x| x + rng.random_range(0.0..2.0)).collect();
        if empirical_cvar(&w, alpha).unwrap() < base {
            failures.push(format!("monotonicity (trial {trial})"));
        }
        // Non-increasing in α.
        let mut prev = f64::INFINITY;
        for i in 0..=99 {
            let v = empirical_cvar(&z, i as f64 / 100.0).unwrap();
            if v > prev + 1e-12 * (1.0 + prev.abs()) {
                failures.push(format!("α-monotonicity (trial {trial})"));
                break;
            }
            prev = v;
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "translation, homogeneity, monotonicity and α-monotonicity on 1000 instances".into()
        } else {
            format!("{} violations, first: {}", failures.len(), failures[0])
        },
    )
}

// ---------------------------------------------------------------------------
// 3. Expected order statistics dominate the CVaR of matching tail mass.

/// Standard normal truncated to `[a, b]`.
struct TruncatedNormal {
    a: f64,
    b: f64,
}

impl TruncatedNormal {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            if (self.a..=self.b).contains(&x) {
                return x;
            }
        }
    }

    /// Mean of the lowest `tail` probability mass.
    fn lower_tail_mean(&self, tail: f64) -> f64 {
        let n = Normal::standard();
        let z = n.cdf(self.b) - n.cdf(self.a);
        let q = n.inverse_cdf(n.cdf(self.a) + tail * z);
        (n.pdf(self.a) - n.pdf(q)) / (tail * z)
    }
}

fn order_statistic_bounds() -> Outcome {
    let draws = 1_000_000;
    let trunc = TruncatedNormal { a: -1.0, b: 2.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_z = f64::INFINITY;
    let mut failures = Vec::new();
    for dist in ["uniform", "truncated-normal"] {
        for n in 2..=10usize {
            let (mut s1, mut q1, mut s2, mut q2) = (0.0, 0.0, 0.0, 0.0);
            let mut buf = vec![0.0; n];
            for _ in 0..draws {
                for x in buf.iter_mut() {
                    *x = if dist == "uniform" { rng.random::<f64>() } else { trunc.sample(&mut rng) };
                }
                let (mut lo, mut second) = (f64::INFINITY, f64::INFINITY);
                for &x in &buf {
                    if x < lo {
                        second = lo;
                        lo = x;
                    } else if x < second {
                        second = x;
                    }
                }
                s1 += lo;
                q1 += lo * lo;
                s2 += second;
                q2 += second * second;
            }
            for (j, (s, q)) in [(1usize, (s1, q1)), (2, (s2, q2))] {
                let m = draws as f64;
                let mean = s / m;
                let se = ((q / m - mean * mean) / m).sqrt();
                let tail = j as f64 / n as f64;
                let cvar = if dist == "uniform" { tail / 2.0 } else { trunc.lower_tail_mean(tail) };
                let z = (mean - cvar) / se;
                worst_z = worst_z.min(z);
                if z < -3.0 {
                    failures.push(format!("{dist} n={n} X({j}): z = {z:.2}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("36 comparisons, smallest standardised margin {worst_z:.2}")
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 4. Limit law of √N (V_N − V^π).

fn normality() -> Outcome {
    let start = Instant::now();
    let small = run_experiment(&preset("normality_random.toml")).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;
    for s in &small.normality.as_ref().unwrap().states {
        let mean_ok = (s.mean - s.theory_mean).abs() <= s.mean_ci99;
        let sd_ok = (s.sd / s.theory_sd - 1.0).abs() <= 0.10;
        pass &= mean_ok && sd_ok;
        notes.push(format!(
            "s{}: mean {:.3} vs {:.3} (±{:.3}) sd ratio {:.3}",
            s.state, s.mean, s.theory_mean, s.mean_ci99, s.sd / s.theory_sd
        ));
    }

    let lake_cfg = preset("normality_frozen_lake.toml");
    let state = lake_cfg.normality.as_ref().unwrap().qq_state;
    let lake = run_experiment(&lake_cfg).unwrap();
    let s = &lake.normality.as_ref().unwrap().states[state];
    let lake_ok = s.mean < 0.0 && s.ks_p_value >= 0.01;
    pass &= lake_ok;
    notes.push(format!(
        "lake s{state}: mean {:.3} (limit {:.3}), sd {:.3} (limit {:.3}), KS D {:.3} p {:.2e}",
        s.mean, s.theory_mean, s.sd, s.theory_sd, s.ks_statistic, s.ks_p_value
    ));
    notes.push(format!("{:.0} s", start.elapsed().as_secs_f64()));
    outcome(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 5. The limiting mean is nonpositive.

fn negative_bias() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mdps: Vec<TabularMdp> = (0..100)
        .map(|i| random_mdp(2 + i % 6, 1 + i % 3, 0.5 + 0.4 * (i % 5) as f64 / 4.0, &mut rng).unwrap())
        .collect();
    for ph in [0.1, 0.8] {
        mdps.push(build_frozen_lake(&FrozenLakeLayout::standard(ph)).unwrap());
    }
    let mut checked = 0;
    let mut worst = f64::NEG_INFINITY;
    for mdp in &mdps {
        let (_, policy) = value_iteration(mdp, 1e-12, 1_000_000).unwrap();
        let nbar = stationary_distribution(mdp, &policy).unwrap();
        for alpha in [0.5, 0.8, 0.9] {
            let lim = limit_params(mdp, &policy, &nbar, alpha).unwrap();
            worst = lim.mean_full.iter().copied().fold(worst, f64::max);
            checked += 1;
        }
    }
    outcome(
        worst <= 0.0,
        format!("{checked} (MDP, α) pairs, largest entry of the limiting mean {worst:.3e}"),
    )
}

// ---------------------------------------------------------------------------
// 6 and 7 share the bandit run.

fn bandit_ordering(result: &AggregateResult, elapsed: Duration) -> Outcome {
    let mut pass = elapsed < Duration::from_secs(600);
    let mut notes = Vec::new();
    for alpha in [0.5, 0.8, 0.9] {
        let (b, bh) = result.curve("brps-cmab-br", alpha).unwrap().last();
        let (t, th) = result.curve("ts-cmab-br", alpha).unwrap().last();
        pass &= b + bh < t - th;
        notes.push(format!("α={alpha}: {b:.1}±{bh:.1} vs {t:.1}±{th:.1}"));
    }
    notes.push(format!("{:.0} s", elapsed.as_secs_f64()));
    outcome(pass, notes.join("; "))
}

fn online_brvi_runs(cfg: &ExperimentConfig) -> (Vec<Vec<f64>>, TabularMdp, OnlineBrviConfig) {
    let env = cfg.environment().unwrap();
    let mdp = env.mdp().unwrap().clone();
    let run = OnlineBrviConfig {
        steps: cfg.horizon.unwrap(),
        risk: RiskConfig::new(cfg.risk_levels[0]).unwrap(),
        delta: cfg.online.as_ref().unwrap().delta,
        start_state: cfg.online.as_ref().unwrap().start_state.unwrap(),
    };
    let traces = (0..cfg.macro_replications)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(cfg.base_seed, r));
            run_online_brvi(&mdp, &run, &mut rng, |_, _| {}).unwrap().cumulative
        })
        .collect();
    (traces, mdp, run)
}

fn sublinearity(bandit: &AggregateResult) -> Outcome {
    let horizon = *bandit.curves[0].iterations.last().unwrap();
    let half = horizon / 2;
    let mut pass = true;
    let mut notes = Vec::new();
    let mut ratio_check = |label: String, at_t: f64, at_2t: f64| {
        let ratio = at_2t / at_t;
        pass &= ratio < 2.0;
        notes.push(format!("{label} {ratio:.3}"));
    };
    for alpha in [0.5, 0.8, 0.9] {
        for algo in ["brps-cmab-br", "brps-cmab"] {
            let c = bandit.curve(algo, alpha).unwrap();
            ratio_check(format!("{algo}@{alpha}"), c.mean_at(half).unwrap(), c.mean_at(horizon).unwrap());
        }
    }
    let ts = bandit.curve("ts-cmab", 0.0).unwrap();
    ratio_check("ts-cmab".into(), ts.mean_at(half).unwrap(), ts.mean_at(horizon).unwrap());

    let cfg = preset("online_brvi.toml");
    let (traces, mdp, run) = online_brvi_runs(&cfg);
    let t = run.steps;
    let mean_at = |step: usize| traces.iter().map(|c| c[step - 1]).sum::<f64>() / traces.len() as f64;
    ratio_check("online-brvi".into(), mean_at(t / 2), mean_at(t));

    let mut bound_ok = true;
    for trace in &traces {
        for (i, regret) in trace.iter().enumerate() {
            let bound = online_brvi_regret_bound(
                mdp.discount(),
                mdp.num_states(),
                mdp.num_actions(),
                run.risk.alpha(),
                i + 1,
                run.delta,
            );
            bound_ok &= *regret <= bound;
        }
    }
    pass &= bound_ok;
    notes.push(format!(
        "online bound respected at every step of {} runs: {bound_ok}",
        traces.len()
    ));
    outcome(pass, format!("ratios R(2T)/R(T): {}", notes.join(", ")))
}

// ---------------------------------------------------------------------------
// 8. BRPS-RL risk-level orderings on Frozen Lake.

fn frozen_lake_ordering() -> Outcome {
    let start = Instant::now();
    let sticky = run_experiment(&preset("frozen_lake_ph01.toml")).unwrap();
    let slippery = run_experiment(&preset("frozen_lake_ph08.toml")).unwrap();
    let fin = |r: &AggregateResult, a: f64| r.curve("brps-rl", a).unwrap().last();
    let (r0, h0) = fin(&sticky, 0.0);
    let (r8, h8) = fin(&sticky, 0.8);
    let (r9, h9) = fin(&sticky, 0.9);
    let (s8, g8) = fin(&slippery, 0.8);
    let (s99, g99) = fin(&slippery, 0.99);
    let pass = r8 < r0 && r9 < r0 && s8 < s99;
    outcome(
        pass,
        format!(
            "p_h=0.1: α=0 {r0:.2}±{h0:.2}, α=0.8 {r8:.2}±{h8:.2}, α=0.9 {r9:.2}±{h9:.2}; \
             p_h=0.8: α=0.8 {s8:.2}±{g8:.2}, α=0.99 {s99:.2}±{g99:.2}; {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Conjugate updates against recomputation from raw data.

fn conjugate_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (ns, na) = (6, 3);
    let mut post = DirichletTransitionPosterior::uniform(ns, na);
    let mut tally = vec![0u64; ns * na * ns];
    for _ in 0..10_000 {
        let (s, a, t) = (rng.random_range(0..ns), rng.random_range(0..na), rng.random_range(0..ns));
        post.update(s, a, t).unwrap();
        tally[(s * na + a) * ns + t] += 1;
    }
    let dirichlet_err = post
        .counts()
        .iter()
        .zip(&tally)
        .map(|(c, &k)| (c - (1.0 + k as f64)).abs())
        .fold(0.0, f64::max);

    let (arms, d) = (4, 3);
    let mut gauss = GaussianLinearPosterior::new(arms, d, 1.0).unwrap();
    let mut data: Vec<Vec<(Vec<f64>, f64)>> = vec![Vec::new(); arms];
    for _ in 0..10_000 {
        let arm = rng.random_range(0..arms);
        let s: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        let r = s.iter().sum::<f64>() * 0.3 + eps;
        gauss.update(arm, &s, r).unwrap();
        data[arm].push((s, r));
    }
    let mut gauss_err: f64 = 0.0;
    for (arm, rows) in data.iter().enumerate() {
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i].0[j]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        let v = DMatrix::identity(d, d) + x.transpose() * &x;
        let b = x.transpose() * y;
        let theta = v.clone().lu().solve(&b).unwrap();
        let scale = v.amax().max(1.0);
        gauss_err = gauss_err.max((gauss.precision(arm) - &v).amax() / scale);
        gauss_err = gauss_err.max((gauss.accumulator(arm) - &b).amax() / b.amax().max(1.0));
        for j in 0..d {
            gauss_err = gauss_err.max((gauss.theta(arm)[j] - theta[j]).abs());
        }
    }
    outcome(
        dirichlet_err <= 1e-10 && gauss_err <= 1e-10,
        format!("Dirichlet max error {dirichlet_err:.1e}, Gaussian max (relative) error {gauss_err:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 10. Online value iteration stays optimistic, monotone and bounded.

fn online_brvi_invariants() -> Outcome {
    let runs = 200;
    let delta = 0.05;
    let mut optimistic_runs = 0;
    let mut violations = Vec::new();
    for r in 0..runs {
        let seed = 10_000 + r as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(4, 2, 0.8, &mut rng).unwrap();
        let (v_star, _) = value_iteration(&mdp, 1e-13, 1_000_000).unwrap();
        let q_star = mdp.q_values(&v_star);
        let cap = 1.0 / (1.0 - mdp.discount());
        let cfg = OnlineBrviConfig {
            steps: 500,
            risk: RiskConfig::new(0.8).unwrap(),
            delta,
            start_state: 0,
        };
        let mut prev: Option<QFunction> = None;
        let mut monotone = true;
        let mut bounded = true;
        let mut optimistic = true;
        run_online_brvi(&mdp, &cfg, &mut rng, |_, q| {
            bounded &= q.values.iter().all(|&x| (0.0..=cap).contains(&x));
            optimistic &= q.values.iter().zip(&q_star).all(|(a, b)| a >= b);
            if let Some(p) = &prev {
                monotone &= q.values.iter().zip(&p.values).all(|(a, b)| a <= b);
            }
            prev = Some(q.clone());
        })
        .unwrap();
        if !(monotone && bounded) {
            violations.push(seed);
        }
        optimistic_runs += optimistic as usize;
    }
    let freq = optimistic_runs as f64 / runs as f64;
    outcome(
        violations.is_empty() && freq >= 1.0 - delta,
        format!(
            "{runs} runs: monotone and bounded violations {:?}, optimistic fraction {freq:.3}",
            violations
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Sample sizes.

fn sample_sizes() -> Outcome {
    let want = [(0.5, 2), (0.8, 5), (0.9, 10), (0.99, 100)];
    let got: Vec<usize> = want.iter().map(|&(a, _)| derived_sample_size(a)).collect();
    let cfg_ok = want.iter().all(|&(a, n)| RiskConfig::new(a).unwrap().sample_size() == n);
    outcome(
        cfg_ok && got.iter().zip(&want).all(|(g, w)| *g == w.1),
        format!("n = {got:?}"),
    )
}

// ---------------------------------------------------------------------------
// 12. Thread budget does not change any output byte.

fn determinism() -> Outcome {
    let mut configs = vec![
        preset("bandit_regret.toml"),
        preset("frozen_lake_ph01.toml"),
        preset("online_brvi.toml"),
        preset("normality_random.toml"),
        preset("solve_frozen_lake.toml"),
    ];
    // Reduced sizes; the schedule is the same as at full scale.
    for cfg in &mut configs {
        cfg.macro_replications = cfg.macro_replications.min(8);
        if let Some(h) = cfg.horizon.as_mut() {
            *h = (*h).min(400);
        }
        if let Some(n) = cfg.normality.as_mut() {
            n.data_size = 5000;
            n.posterior_samples = 200;
        }
    }
    let mut mismatched = Vec::new();
    let mut files = 0;
    for cfg in &mut configs {
        let mut outputs = Vec::new();
        for threads in [1, 8] {
            cfg.threads = Some(threads);
            let dir = tempfile::tempdir().unwrap();
            let paths = write_outputs(&run_experiment(cfg).unwrap(), dir.path()).unwrap();
            outputs.push(
                paths
                    .iter()
                    .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        files += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatched.push(cfg.kind.name());
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{files} files across 5 experiment kinds, mismatches: {mismatched:?}"),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let o = f();
        println!(
            "criterion {id:>2} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };

    run(1, "CVaR oracle equivalence", &cvar_oracle_equivalence);
    run(2, "coherence", &coherence);
    run(3, "order-statistic bounds", &order_statistic_bounds);
    run(4, "limit-law normality", &normality);
    run(5, "negative bias of the limit", &negative_bias);

    let start = Instant::now();
    let bandit = run_experiment(&preset("bandit_regret.toml")).unwrap();
    let bandit_time = start.elapsed();
    run(6, "bandit BR-Regret ordering", &|| bandit_ordering(&bandit, bandit_time));
    run(7, "sublinear regret and online bound", &|| sublinearity(&bandit));
    run(8, "Frozen Lake risk-level ordering", &frozen_lake_ordering);
    run(9, "conjugate-update exactness", &conjugate_exactness);
    run(10, "online value iteration invariants", &online_brvi_invariants);
    run(11, "sample-size mapping", &sample_sizes);
    run(12, "determinism across thread budgets", &determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
